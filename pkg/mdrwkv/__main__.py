from mdrwkv.main import main

raise SystemExit(main())
