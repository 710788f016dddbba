import sys

from defedavg.run import main

sys.exit(main())
