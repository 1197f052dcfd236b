from ratmix.cli import main

main()
