#include <cstdio>

int main() {
  std::puts("rp3d: command-line interface not wired up yet");
  return 2;
}
