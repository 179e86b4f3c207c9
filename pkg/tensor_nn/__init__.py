# NumPy layers, fuzzy tiling activation, Adam and the network builders
