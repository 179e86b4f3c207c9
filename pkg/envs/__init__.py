# Maze environment
