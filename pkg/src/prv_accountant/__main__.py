from prv_accountant.cli import main

main()
