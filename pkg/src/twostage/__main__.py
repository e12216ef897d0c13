from twostage.cli import main

main()
