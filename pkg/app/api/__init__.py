# API package initialization 