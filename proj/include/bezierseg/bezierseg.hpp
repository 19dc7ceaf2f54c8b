#pragma once

#include "bezierseg/bezier.hpp"
#include "bezierseg/cloud_io.hpp"
#include "bezierseg/config.hpp"
#include "bezierseg/errors.hpp"
#include "bezierseg/fitting.hpp"
#include "bezierseg/gradcheck.hpp"
#include "bezierseg/losses.hpp"
#include "bezierseg/matching.hpp"
#include "bezierseg/metrics.hpp"
#include "bezierseg/pipeline.hpp"
#include "bezierseg/ply.hpp"
#include "bezierseg/rng.hpp"
#include "bezierseg/synthgen.hpp"
