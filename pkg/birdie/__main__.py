from birdie.cli import main

main()
