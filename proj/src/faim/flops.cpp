#include "faim/flops.hpp"

namespace faim {

namespace {
thread_local FlopCounts* g_flops = nullptr;
}

FlopCounts* current_flops() { return g_flops; }

FlopScope::FlopScope(FlopCounts* counts) : previous_(g_flops) { g_flops = counts; }
FlopScope::~FlopScope() { g_flops = previous_; }

}  // namespace faim
