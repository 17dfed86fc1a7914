from fogafc.cli import main

raise SystemExit(main())
