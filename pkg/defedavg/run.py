import logging
import os
import sys

from dotenv import load_dotenv

load_dotenv()
logging.basicConfig(
    level=os.getenv('DEFEDAVG_LOG_LEVEL', 'INFO').upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
)

from defedavg.app import create_app

app = create_app()


def main(argv=None) -> int:
    return app.run(argv)


if __name__ == '__main__':
    sys.exit(main())
