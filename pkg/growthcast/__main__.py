import sys

from growthcast.main import main

sys.exit(main())
