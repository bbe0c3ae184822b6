"""Scene description, software rasterization and the two-pass slice pipeline."""
