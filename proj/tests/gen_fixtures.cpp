// Writes the frozen oracle outputs under tests/fixtures/. Run manually when a
// fixture case changes; the committed outputs are what the tests assert
// against.

#include <cstdio>
#include <string>

#include "oracle.hpp"
#include "route_small_case.hpp"

namespace {

void write_values(const std::string& path, const capmt_oracle::Vec& values) {
  FILE* f = std::fopen(path.c_str(), "w");
  if (!f) {
    std::perror(path.c_str());
    std::exit(1);
  }
  for (double v : values) std::fprintf(f, "%.17g\n", v);
  std::fclose(f);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string dir = argc > 1 ? argv[1] : "tests/fixtures";
  write_values(dir + "/route_small.txt",
               capmt_oracle::route(capmt_test::small_route_context(),
                                   capmt_test::small_route_features(),
                                   capmt_test::small_route_params(), 1));
  write_values(dir + "/route_conventional_small.txt",
               capmt_oracle::route_conventional(capmt_test::small_conventional_features(),
                                                capmt_test::small_conventional_params(), 2));
  std::printf("fixtures written to %s\n", dir.c_str());
  return 0;
}
