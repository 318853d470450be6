#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "ppodiff/runtime.hpp"

int main(int argc, char** argv) {
  ppodiff::tune_allocator();
  doctest::Context context(argc, argv);
  return context.run();
}
