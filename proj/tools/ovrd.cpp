#include <cstdio>

int main() {
  std::puts("ovrd: cli under construction");
  return 0;
}
