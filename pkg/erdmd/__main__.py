from erdmd.cli import main

raise SystemExit(main())
