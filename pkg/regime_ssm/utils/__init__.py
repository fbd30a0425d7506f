"""Configuration, file formats, and the plot tracker / PDF report helpers."""
