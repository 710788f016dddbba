import os
from dotenv import load_dotenv

load_dotenv()


class Config:
    DATA_DIR = os.getenv('DEFEDAVG_DATA_DIR', 'data')
    OUTPUT_DIR = os.getenv('DEFEDAVG_OUTPUT_DIR', 'results')
    LOG_LEVEL = os.getenv('DEFEDAVG_LOG_LEVEL', 'INFO')
    WORKERS = int(os.getenv('DEFEDAVG_WORKERS', 1))
