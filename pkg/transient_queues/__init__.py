# Transient queueing toolkit package
