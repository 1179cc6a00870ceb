from fcn_ctr.cli import entrypoint

entrypoint()
