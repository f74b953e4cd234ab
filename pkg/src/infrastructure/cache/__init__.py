# Cache module
