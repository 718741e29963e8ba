// Catch2 v3 amalgamated implementation (provides main) compiled once and
// linked into every test binary.
#include <catch2/catch_amalgamated.cpp>
