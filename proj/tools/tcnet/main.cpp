#include "tcnet/cli.hpp"
#include "tcnet/runtime.hpp"

int main(int argc, char** argv) {
  tcnet::tune_allocator();
  return tcnet::cli::run(argc, argv);
}
