#include <cstdio>
int main() { std::puts("bfe"); return 0; }
