import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Settings:
    PROJECT_NAME: str = "Flash/No-Flash Denoiser"

    # Torch device used for training, denoising and benchmarks
    DEVICE: str = os.getenv("FNF_DEVICE", "cpu")

    # Output locations
    RESULTS_DIR: str = os.getenv("FNF_RESULTS_DIR", "results")
    DATASET_DIR: str = os.getenv("FNF_DATASET_DIR", "dataset")

    # Logging
    LOG_LEVEL: str = os.getenv("FNF_LOG_LEVEL", "INFO")
    LOG_FORMAT: str = "%(asctime)s %(levelname)s [%(name)s] %(message)s"
    LOG_DATEFMT: str = "%Y-%m-%d %H:%M:%S"

    # Data loading
    NUM_WORKERS: int = int(os.getenv("FNF_NUM_WORKERS", "0"))

    # Master seed used when a command gets no --seed
    DEFAULT_SEED: int = int(os.getenv("FNF_SEED", "0"))


settings = Settings()
