from openvocab_panoptic.cli import main

main()
