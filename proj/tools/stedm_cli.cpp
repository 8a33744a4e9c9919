#include <cstdio>
int main() { std::puts("stedm: placeholder"); return 0; }
