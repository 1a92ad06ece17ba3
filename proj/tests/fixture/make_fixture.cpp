#include <cstdio>
#include <string>

#include "replay_fixture.hpp"

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr, "usage: make_fixture <small|full> <dir>\n");
    return 1;
  }
  const std::string which = argv[1];
  const auto shape = which == "full" ? dtreg::fixture::full_scale_shape() : dtreg::fixture::small_shape();
  const auto fx = dtreg::fixture::build_fixture(argv[2], shape);
  std::printf("corpus=%zu relevant=%zu included=%zu valid=%zu pairs=%zu\n", fx.expected.corpus,
              fx.expected.relevant, fx.expected.included, fx.expected.valid, fx.expected.pairs);
  return 0;
}
