"""Climate impact workflow framework: modules, templates, engine, catalogue."""

__version__ = "0.1.0"
