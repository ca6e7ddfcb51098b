# KDiff Application Package
