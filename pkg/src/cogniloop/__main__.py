from cogniloop.cli import main

raise SystemExit(main())
