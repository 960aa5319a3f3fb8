# NZip Tests
# "Me fail English? That's unpossible!" - Ralph Wiggum
