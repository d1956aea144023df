# Services exports
