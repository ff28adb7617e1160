#include <cstdio>

int main() {
    std::puts("promptfence: CLI wiring pending");
    return 0;
}
