"""Boot shim: arms the collection agent when this directory is on PYTHONPATH.

The interpreter imports ``sitecustomize`` automatically during startup, which
stands in for the dynamic loader running a constructor.  Everything is
guarded: if the package is missing or anything misbehaves, the host process
runs exactly as before — no exception, no output, no exit-code change.
"""

try:
    import atexit

    from siren.collector import agent_finalize, agent_initialize

    agent_initialize()
    atexit.register(agent_finalize)
except Exception:
    pass
