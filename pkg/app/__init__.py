# App package initialization 