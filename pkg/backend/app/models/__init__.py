# Models Module


