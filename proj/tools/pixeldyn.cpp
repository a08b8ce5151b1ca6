// pixeldyn command-line entry point. Subcommands are wired up in cli.hpp so
// they stay testable; this file only owns main().

#include <cstdio>
#include <exception>

#include "pixeldyn/cli.hpp"

int main(int argc, char** argv) {
  try {
    return pixeldyn::cli_main(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
