#include "smlm/parallel.hpp"

#include <cstdlib>
#include <string>

namespace smlm {

namespace {

std::atomic<unsigned> g_threads{0};

unsigned default_threads()
{
  if (const char* env = std::getenv("SMLMFORGE_THREADS")) {
    try {
      const long n = std::stol(env);
      if (n > 0)
        return static_cast<unsigned>(n);
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

} // namespace

void set_thread_count(unsigned n)
{
  g_threads.store(n);
}

unsigned thread_count()
{
  const unsigned n = g_threads.load();
  return n == 0 ? default_threads() : n;
}

unsigned thread_count_override()
{
  return g_threads.load();
}

} // namespace smlm
