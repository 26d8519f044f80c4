"""Game implementations built on the shared SDE/training machinery."""
