// Umbrella header.
#pragma once

#include "nfed/adam.hpp"
#include "nfed/config.hpp"
#include "nfed/edits.hpp"
#include "nfed/fields.hpp"
#include "nfed/formation.hpp"
#include "nfed/gradcheck.hpp"
#include "nfed/image_io.hpp"
#include "nfed/losses.hpp"
#include "nfed/net.hpp"
#include "nfed/parallel.hpp"
#include "nfed/resample.hpp"
#include "nfed/rng.hpp"
#include "nfed/sh.hpp"
#include "nfed/solver.hpp"
#include "nfed/synth.hpp"
#include "nfed/toynet.hpp"
