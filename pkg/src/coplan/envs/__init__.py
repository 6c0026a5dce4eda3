from .cvrp import CvrpEnv, CvrpInstance
from .cvrp import generate_offline as generate_cvrp_offline
from .cvrp import generate_online as generate_cvrp_online
from .pmsp import OnlineArrivalConfig, PmspEnv, PmspInstance
from .pmsp import generate_offline as generate_pmsp_offline
from .pmsp import generate_online as generate_pmsp_online


def make_env(instance, **kwargs):
    if isinstance(instance, CvrpInstance):
        return CvrpEnv(instance, **kwargs)
    if isinstance(instance, PmspInstance):
        return PmspEnv(instance, **kwargs)
    raise TypeError(f"unknown instance type {type(instance).__name__}")
