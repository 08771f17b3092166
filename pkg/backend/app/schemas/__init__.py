# Import all schemas here
from app.schemas.imaging import *
from app.schemas.simulation import *
from app.schemas.network import *
from app.schemas.training import *
from app.schemas.evaluation import *
from app.schemas.manifest import *
from app.schemas.run import *
