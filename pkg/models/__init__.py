# Domain types: maze, configuration and measurement records
