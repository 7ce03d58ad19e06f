from metascreen import cli

cli.main()
