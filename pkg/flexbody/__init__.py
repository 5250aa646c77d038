"""Tool-state recognition and whole-body control for a flexible low-rigidity robot."""

__version__ = "0.1.0"

from flexbody._errors import *
from flexbody.analysis import *
from flexbody.config import config_hash, load_config
from flexbody.controller import *
from flexbody.online import *
from flexbody.sim import *
from flexbody.trainer import *
from flexbody.wtnpb import *
from flexbody.scenarios import *

from . import net
