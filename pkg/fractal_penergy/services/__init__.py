"""Service layer: one service per analysis concern."""
