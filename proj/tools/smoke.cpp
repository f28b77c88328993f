#include "graph.hpp"
int main() { motlab::nn::Graph g; return 0; }
