// Regenerates the bundled synthetic tasks: make_synthetic <data/synthetic>

#include <iostream>

#include "smprompt/synthetic.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_synthetic <output-dir>\n";
    return 1;
  }
  const std::filesystem::path root = argv[1];
  try {
    smprompt::synthetic::Options o;
    o.name = "signal";
    smprompt::synthetic::write_task(smprompt::synthetic::signal_task(o), root / "signal");
    o.name = "filter";
    o.seed = 11;
    smprompt::synthetic::write_task(smprompt::synthetic::filter_task(o), root / "filter");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
