# API routes package 