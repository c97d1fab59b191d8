# Services package initialization 