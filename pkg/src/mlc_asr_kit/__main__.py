from mlc_asr_kit.cli import main

main()
