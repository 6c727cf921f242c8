"""Package entry for stylemotion."""

import sys

from stylemotion import app

if __name__ == "__main__":
    sys.exit(app.main())
