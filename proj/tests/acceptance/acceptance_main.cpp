// Acceptance suite: one numbered criterion per invocation, one PASS/FAIL
// line per criterion on stdout. Exit 0 iff the requested criteria all pass.
#include <cstring>
#include <iostream>
#include <string>
#include <vector>

int run_criterion(int id);  // defined in acceptance_criteria.cpp

int main(int argc, char** argv) {
  std::vector<int> ids;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      ids.push_back(std::atoi(argv[++i]));
    } else if (std::strcmp(argv[i], "--all") == 0) {
      for (int c = 1; c <= 10; ++c) ids.push_back(c);
    }
  }
  if (ids.empty()) {
    std::cerr << "usage: datta_acceptance --criterion N | --all\n";
    return 2;
  }
  int failures = 0;
  for (int id : ids) failures += run_criterion(id) == 0 ? 0 : 1;
  return failures == 0 ? 0 : 1;
}
