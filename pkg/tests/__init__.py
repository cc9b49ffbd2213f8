# CyclingLab Tests
