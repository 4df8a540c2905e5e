#include <cstdio>

int main() {
  std::puts("mzones: placeholder");
  return 0;
}
