# Representation properties and tabular task similarity
