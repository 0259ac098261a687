#pragma once

#include "cvdiscord/core_states.hpp"
#include "cvdiscord/errors.hpp"
#include "cvdiscord/fock.hpp"
#include "cvdiscord/io.hpp"
#include "cvdiscord/marginals.hpp"
#include "cvdiscord/numerics.hpp"
#include "cvdiscord/parallel.hpp"
#include "cvdiscord/sampler.hpp"
#include "cvdiscord/serialization.hpp"
#include "cvdiscord/verifier.hpp"
